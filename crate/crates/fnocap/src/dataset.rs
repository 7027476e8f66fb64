//! Dataset synthesis (GRF initial conditions -> Burgers solutions at
//! t_final) and the on-disk format: one UTF-8 JSON header line, then a
//! raw little-endian f64 payload laid out [m][N][d_a] inputs followed
//! by [m][N][d_u] targets.

use crate::burgers::{burgers_solve, BurgersError, BurgersSpec};
use crate::grf::{grf_sample, GrfError, GrfSpec};
use crate::tensor::{Tensor, TensorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DATASET_MAGIC: &str = "FNOCAP-DS v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Grf(#[from] GrfError),
    #[error(transparent)]
    Burgers(#[from] BurgersError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad dataset file: {0}")]
    BadFile(String),
    #[error("need at least one sample")]
    Empty,
}

/// Paired (a_i, u_i) samples on a shared 1D grid, with the specs and
/// seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// [N, 1] each.
    pub inputs: Vec<Tensor>,
    /// [N, 1] each.
    pub targets: Vec<Tensor>,
    pub grf: GrfSpec,
    pub burgers: BurgersSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.inputs.len()
    }

    pub fn n(&self) -> usize {
        self.inputs.first().map_or(0, |t| t.shape()[0])
    }
}

/// Synthesize train and test sets. Sample i of the train set uses GRF
/// stream (seed, i); the test set continues at (seed, m_train + i), so
/// the two are independent and the whole dataset is a pure function of
/// the seed.
pub fn make_dataset(
    grf: &GrfSpec,
    burgers: &BurgersSpec,
    m_train: usize,
    m_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if m_train == 0 || m_test == 0 {
        return Err(DatasetError::Empty);
    }
    let spec = GrfSpec { seed, ..grf.clone() };
    let fields = grf_sample(&spec, m_train + m_test)?;
    let solved: Vec<(Tensor, Tensor)> = fields
        .into_par_iter()
        .map(|u0| -> Result<(Tensor, Tensor), DatasetError> {
            let n = u0.len();
            let u1 = burgers_solve(&u0, burgers)?;
            Ok((u0.reshape(&[n, 1])?, u1.reshape(&[n, 1])?))
        })
        .collect::<Result<_, _>>()?;
    let mut inputs = Vec::with_capacity(m_train + m_test);
    let mut targets = Vec::with_capacity(m_train + m_test);
    for (a, u) in solved {
        inputs.push(a);
        targets.push(u);
    }
    let test_inputs = inputs.split_off(m_train);
    let test_targets = targets.split_off(m_train);
    let make = |inputs, targets| Dataset {
        inputs,
        targets,
        grf: spec.clone(),
        burgers: burgers.clone(),
        seed,
    };
    Ok((make(inputs, targets), make(test_inputs, test_targets)))
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    magic: String,
    m: usize,
    n: usize,
    d_a: usize,
    d_u: usize,
    seed: u64,
    grf: GrfSpec,
    burgers: BurgersSpec,
}

pub fn save_dataset<W: Write>(ds: &Dataset, w: &mut W) -> Result<(), DatasetError> {
    if ds.inputs.is_empty() {
        return Err(DatasetError::Empty);
    }
    let header = DatasetHeader {
        magic: DATASET_MAGIC.to_string(),
        m: ds.m(),
        n: ds.n(),
        d_a: 1,
        d_u: 1,
        seed: ds.seed,
        grf: ds.grf.clone(),
        burgers: ds.burgers.clone(),
    };
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for t in ds.inputs.iter().chain(&ds.targets) {
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_dataset<R: Read>(r: &mut R) -> Result<Dataset, DatasetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DatasetError::BadFile("missing header line".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.magic != DATASET_MAGIC {
        return Err(DatasetError::BadFile(format!(
            "bad magic {:?}",
            header.magic
        )));
    }
    let payload = &bytes[nl + 1..];
    let per_input = header.n * header.d_a;
    let per_target = header.n * header.d_u;
    let want = header.m * (per_input + per_target) * 8;
    if payload.len() != want {
        return Err(DatasetError::BadFile(format!(
            "payload is {} bytes, expected {want}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut inputs = Vec::with_capacity(header.m);
    let mut targets = Vec::with_capacity(header.m);
    for i in 0..header.m {
        let start = i * per_input;
        inputs.push(Tensor::from_vec(
            &[header.n, header.d_a],
            values[start..start + per_input].to_vec(),
        )?);
    }
    let base = header.m * per_input;
    for i in 0..header.m {
        let start = base + i * per_target;
        targets.push(Tensor::from_vec(
            &[header.n, header.d_u],
            values[start..start + per_target].to_vec(),
        )?);
    }
    Ok(Dataset {
        inputs,
        targets,
        grf: header.grf,
        burgers: header.burgers,
        seed: header.seed,
    })
}

pub fn save_dataset_file(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_dataset(ds, &mut f)
}

pub fn load_dataset_file(path: &Path) -> Result<Dataset, DatasetError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_dataset(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Dataset, Dataset) {
        make_dataset(&GrfSpec::new(32, 0), &BurgersSpec::default(), 3, 2, 17).unwrap()
    }

    #[test]
    fn shapes_and_finiteness() {
        let (train, test) = small();
        assert_eq!(train.m(), 3);
        assert_eq!(test.m(), 2);
        for ds in [&train, &test] {
            for (a, u) in ds.inputs.iter().zip(&ds.targets) {
                assert_eq!(a.shape(), &[32, 1]);
                assert_eq!(u.shape(), &[32, 1]);
                a.check_finite().unwrap();
                u.check_finite().unwrap();
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (a_train, a_test) = small();
        let (b_train, b_test) = small();
        for (x, y) in [(&a_train, &b_train), (&a_test, &b_test)] {
            for (ta, tb) in x.inputs.iter().zip(&y.inputs) {
                for (u, v) in ta.data().iter().zip(tb.data()) {
                    assert_eq!(u.to_bits(), v.to_bits());
                }
            }
            for (ta, tb) in x.targets.iter().zip(&y.targets) {
                for (u, v) in ta.data().iter().zip(tb.data()) {
                    assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
    }

    #[test]
    fn train_and_test_draws_are_distinct() {
        let (train, test) = small();
        assert_ne!(train.inputs[0].data(), test.inputs[0].data());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (train, _) = small();
        let mut bytes = Vec::new();
        save_dataset(&train, &mut bytes).unwrap();
        let loaded = load_dataset(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded.seed, train.seed);
        assert_eq!(loaded.grf, train.grf);
        assert_eq!(loaded.burgers, train.burgers);
        for (a, b) in train
            .inputs
            .iter()
            .chain(&train.targets)
            .zip(loaded.inputs.iter().chain(&loaded.targets))
        {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let mut again = Vec::new();
        save_dataset(&loaded, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let (train, _) = small();
        let mut bytes = Vec::new();
        save_dataset(&train, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            load_dataset(&mut bytes.as_slice()),
            Err(DatasetError::BadFile(_))
        ));
    }
}
