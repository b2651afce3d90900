//! Per-sample label retrieval from harmonized product grids.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, RasterGrid};
use crate::nomenclature::{ClassScheme, GeneralClass, ProductLabel};
use crate::sampling::SamplePoint;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("sample {sample_id} is outside product {product}: {source}")]
    OutOfExtent { sample_id: u64, product: String, source: GridError },
    #[error("product {0} is configured twice")]
    DuplicateProduct(String),
    #[error("product {0} is not in the retrieval table")]
    UnknownProduct(String),
    #[error("malformed retrieval table: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What to do with a sample that falls outside a product grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentPolicy {
    #[default]
    Strict,
    /// Record the product's nodata code and Others/Unclassified.
    Unclassified,
}

/// A named product grid with its legend.
#[derive(Debug, Clone)]
pub struct Product {
    pub name: String,
    pub grid: RasterGrid,
    pub scheme: ClassScheme,
}

impl Product {
    pub fn new(name: impl Into<String>, grid: RasterGrid, scheme: ClassScheme) -> Self {
        Self { name: name.into(), grid, scheme }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub sample_id: u64,
    pub x: f64,
    pub y: f64,
    /// One label per product, in [`RetrievalTable::products`] order.
    pub labels: Vec<ProductLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTable {
    pub products: Vec<String>,
    pub rows: Vec<RetrievalRow>,
}

impl RetrievalTable {
    pub fn product_index(&self, name: &str) -> Result<usize, RetrievalError> {
        self.products.iter().position(|p| p == name).ok_or_else(|| RetrievalError::UnknownProduct(name.to_string()))
    }

    /// Harmonized label of every sample for one product.
    pub fn labels_for(&self, product: &str) -> Result<Vec<(u64, GeneralClass)>, RetrievalError> {
        let i = self.product_index(product)?;
        Ok(self.rows.iter().map(|r| (r.sample_id, r.labels[i].general)).collect())
    }

    /// `sample_id,x,y` then `<name>_code,<name>_class` per product.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), RetrievalError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["sample_id".to_string(), "x".into(), "y".into()];
        for p in &self.products {
            header.push(format!("{p}_code"));
            header.push(format!("{p}_class"));
        }
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.sample_id.to_string(), row.x.to_string(), row.y.to_string()];
            for l in &row.labels {
                rec.push(l.raw.to_string());
                rec.push(l.general.name().to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, RetrievalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let fields: Vec<&str> = header.iter().collect();
        if fields.len() < 3 || fields[..3] != ["sample_id", "x", "y"] || (fields.len() - 3) % 2 != 0 {
            return Err(RetrievalError::Format(format!("unexpected header {fields:?}")));
        }
        let mut products = Vec::new();
        for pair in fields[3..].chunks(2) {
            let name = pair[0]
                .strip_suffix("_code")
                .filter(|n| pair[1].strip_suffix("_class") == Some(*n))
                .ok_or_else(|| RetrievalError::Format(format!("bad product columns {pair:?}")))?;
            products.push(name.to_string());
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let bad = |what: &str| RetrievalError::Format(format!("line {line}: bad {what}"));
            let sample_id = field(0).parse().map_err(|_| bad("sample_id"))?;
            let x = field(1).parse().map_err(|_| bad("x"))?;
            let y = field(2).parse().map_err(|_| bad("y"))?;
            let mut labels = Vec::with_capacity(products.len());
            for p in 0..products.len() {
                let raw = field(3 + 2 * p).parse().map_err(|_| bad("code"))?;
                let general = field(4 + 2 * p).parse().map_err(|_| bad("class"))?;
                labels.push(ProductLabel { raw, general });
            }
            rows.push(RetrievalRow { sample_id, x, y, labels });
        }
        Ok(Self { products, rows })
    }
}

/// Reads each product's value at the cell whose center is nearest to every
/// sample and harmonizes it with the product's scheme. Rows keep sample order.
pub fn retrieve_labels(
    samples: &[SamplePoint],
    products: &[Product],
    policy: ExtentPolicy,
) -> Result<RetrievalTable, RetrievalError> {
    for (i, p) in products.iter().enumerate() {
        if products[..i].iter().any(|q| q.name == p.name) {
            return Err(RetrievalError::DuplicateProduct(p.name.clone()));
        }
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let mut labels = Vec::with_capacity(products.len());
        for p in products {
            let label = match p.grid.value_at(s.x, s.y) {
                Ok(raw) => ProductLabel::from_scheme(&p.scheme, raw),
                Err(source) => match policy {
                    ExtentPolicy::Strict => {
                        return Err(RetrievalError::OutOfExtent {
                            sample_id: s.sample_id,
                            product: p.name.clone(),
                            source,
                        })
                    }
                    ExtentPolicy::Unclassified => {
                        ProductLabel { raw: p.grid.nodata(), general: GeneralClass::OthersUnclassified }
                    }
                },
            };
            labels.push(label);
        }
        rows.push(RetrievalRow { sample_id: s.sample_id, x: s.x, y: s.y, labels });
    }
    Ok(RetrievalTable { products: products.iter().map(|p| p.name.clone()).collect(), rows })
}
