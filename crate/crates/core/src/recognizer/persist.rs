//! Model container: `"GFR1"`, u32 format version, u64 header length, JSON
//! header, little-endian f64 arrays in header order, CRC-32 of everything
//! after the version field. All integers are little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GalleryEntry, PipelineConfig, RecognizerModel};
use crate::error::{Error, Result};
use crate::filter_selection::OrthoBank;
use crate::gabor::{BankParams, ComplexKernel};
use crate::image::Image;
use crate::subspace::{LdaModel, PcaModel, SubspaceModel};

pub const MAGIC: &[u8; 4] = b"GFR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    shape: Vec<usize>,
}

impl ArraySpec {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OrthoHeader {
    k: usize,
    kernel_size: usize,
    retained_variance: f64,
    provenance: BankParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: PipelineConfig,
    ortho_bank: OrthoHeader,
    lda_ridge: f64,
    labels: Vec<String>,
    arrays: Vec<ArraySpec>,
}

struct Arrays {
    specs: Vec<ArraySpec>,
    data: Vec<Vec<f64>>,
}

impl Arrays {
    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.specs.push(ArraySpec {
            name: name.into(),
            shape,
        });
        self.data.push(data);
    }
}

fn serialization(msg: impl Into<String>) -> Error {
    Error::Serialization(msg.into())
}

/// Serializes `model` into `w`.
pub fn write_model<W: Write>(model: &RecognizerModel, w: &mut W) -> Result<()> {
    let bank = &model.ortho_bank;
    let ks = bank.kernels.first().map(|k| k.size).unwrap_or(0);
    let mut arrays = Arrays {
        specs: Vec::new(),
        data: Vec::new(),
    };
    let kernel_data: Vec<f64> = bank.kernels.iter().flat_map(|k| k.data.iter().flat_map(|c| [c.re, c.im])).collect();
    arrays.push("ortho_kernels", vec![bank.kernels.len(), ks, ks, 2], kernel_data);
    arrays.push("ortho_eigenvalues", vec![bank.eigenvalues.len()], bank.eigenvalues.clone());
    for (name, t) in [("left_template", &model.left_template), ("right_template", &model.right_template)] {
        arrays.push(name, vec![t.height(), t.width()], t.data().to_vec());
    }
    let pca = &model.subspace.pca;
    arrays.push("pca_mean", vec![pca.mean.len()], pca.mean.as_slice().to_vec());
    arrays.push("pca_basis", vec![pca.basis.ncols(), pca.basis.nrows()], pca.basis.as_slice().to_vec());
    arrays.push("pca_eigenvalues", vec![pca.eigenvalues.len()], pca.eigenvalues.clone());
    arrays.push("pca_spectrum", vec![pca.spectrum.len()], pca.spectrum.clone());
    let lda = &model.subspace.lda;
    arrays.push("lda_projection", vec![lda.projection.ncols(), lda.projection.nrows()], lda.projection.as_slice().to_vec());
    arrays.push("lda_eigenvalues", vec![lda.eigenvalues.len()], lda.eigenvalues.clone());
    let r = model.gallery.first().map(|g| g.template.len()).unwrap_or(0);
    let gallery: Vec<f64> = model.gallery.iter().flat_map(|g| g.template.iter().copied()).collect();
    arrays.push("gallery", vec![model.gallery.len(), r], gallery);

    let header = Header {
        config: model.config.clone(),
        ortho_bank: OrthoHeader {
            k: bank.k,
            kernel_size: ks,
            retained_variance: bank.retained_variance,
            provenance: bank.provenance.clone(),
        },
        lda_ridge: lda.ridge,
        labels: model.gallery.iter().map(|g| g.label.clone()).collect(),
        arrays: arrays.specs,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| serialization(e.to_string()))?;

    let mut crc = crc32fast::Hasher::new();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let mut emit = |bytes: &[u8], w: &mut W| -> Result<()> {
        crc.update(bytes);
        w.write_all(bytes)?;
        Ok(())
    };
    emit(&(header_bytes.len() as u64).to_le_bytes(), w)?;
    emit(&header_bytes, w)?;
    let mut buf = Vec::with_capacity(8 * 4096);
    for arr in &arrays.data {
        for chunk in arr.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            emit(&buf, w)?;
        }
    }
    w.write_all(&crc.finalize().to_le_bytes())?;
    Ok(())
}

pub fn save_model(model: &RecognizerModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Parses a model from its serialized bytes.
pub fn read_model(bytes: &[u8]) -> Result<RecognizerModel> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(serialization("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    if bytes.len() < 8 + 8 + 4 {
        return Err(serialization("model file truncated"));
    }
    let (payload, tail) = bytes[8..].split_at(bytes.len() - 8 - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let header_len = u64::from_le_bytes(payload[..8].try_into().unwrap()) as usize;
    let rest = &payload[8..];
    if header_len > rest.len() {
        return Err(serialization("header length exceeds file size"));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len]).map_err(|e| serialization(e.to_string()))?;
    let mut body = &rest[header_len..];
    let mut arrays = std::collections::HashMap::new();
    for spec in &header.arrays {
        let n = spec.len();
        if body.len() < 8 * n {
            return Err(serialization(format!("array {} truncated", spec.name)));
        }
        let (chunk, tail) = body.split_at(8 * n);
        let values: Vec<f64> = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        arrays.insert(spec.name.as_str(), (spec.shape.clone(), values));
        body = tail;
    }
    if !body.is_empty() {
        return Err(serialization("trailing bytes after arrays"));
    }
    let mut take = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        arrays.remove(name).ok_or_else(|| serialization(format!("missing array {name}")))
    };
    let expect_rank = |name: &str, shape: &[usize], rank: usize| -> Result<()> {
        if shape.len() != rank {
            return Err(serialization(format!("array {name} has rank {}, expected {rank}", shape.len())));
        }
        Ok(())
    };

    let (shape, kd) = take("ortho_kernels")?;
    expect_rank("ortho_kernels", &shape, 4)?;
    let ks = shape[1];
    let kernels = kd
        .chunks_exact((ks * ks * 2).max(1))
        .map(|c| ComplexKernel::new(ks, c.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()))
        .collect::<Result<Vec<_>>>()?;
    let (_, ortho_eigenvalues) = take("ortho_eigenvalues")?;
    let ortho_bank = OrthoBank {
        kernels,
        retained_variance: header.ortho_bank.retained_variance,
        k: header.ortho_bank.k,
        eigenvalues: ortho_eigenvalues,
        provenance: header.ortho_bank.provenance,
    };

    let mut template = |name: &str| -> Result<Image> {
        let (shape, data) = take(name)?;
        expect_rank(name, &shape, 2)?;
        Image::new(shape[1], shape[0], data)
    };
    let left_template = template("left_template")?;
    let right_template = template("right_template")?;

    let matrix = |name: &str, (shape, data): (Vec<usize>, Vec<f64>)| -> Result<DMatrix<f64>> {
        expect_rank(name, &shape, 2)?;
        Ok(DMatrix::from_column_slice(shape[1], shape[0], &data))
    };
    let pca = PcaModel {
        mean: DVector::from_vec(take("pca_mean")?.1),
        basis: matrix("pca_basis", take("pca_basis")?)?,
        eigenvalues: take("pca_eigenvalues")?.1,
        spectrum: take("pca_spectrum")?.1,
    };
    let lda = LdaModel {
        projection: matrix("lda_projection", take("lda_projection")?)?,
        eigenvalues: take("lda_eigenvalues")?.1,
        ridge: header.lda_ridge,
    };
    let (gshape, gdata) = take("gallery")?;
    expect_rank("gallery", &gshape, 2)?;
    if gshape[0] != header.labels.len() {
        return Err(serialization("gallery size does not match label count"));
    }
    let r = gshape[1];
    let gallery = header
        .labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| GalleryEntry {
            label,
            template: gdata[i * r..(i + 1) * r].to_vec(),
        })
        .collect();
    RecognizerModel::from_parts(
        header.config,
        ortho_bank,
        SubspaceModel { pca, lda },
        gallery,
        left_template,
        right_template,
    )
}

pub fn load_model(path: &Path) -> Result<RecognizerModel> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?
        .read_to_end(&mut bytes)?;
    read_model(&bytes)
}
